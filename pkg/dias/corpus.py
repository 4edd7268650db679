"""
Corpus storage: JSON manifest plus little-endian float32 blob.

Blob layout:
- bytes 0-3: magic 0x44 0x49 0x41 0x53 ("DIAS")
- bytes 4-7: u32 version (= 1)
- then row-major float32 matrices at the offsets named by the manifest

Manifest layout:
- version, d_in_image, d_in_text, blob (file name relative to the manifest)
- instances: [{id, image_count, offset, text_ids}]
- texts: [{id, word_count, offset, image_id}]
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dias.errors import CorpusFormatError, UsageError
from dias.utils import write_json

logger = logging.getLogger(__name__)

MAGIC = b"DIAS"
FORMAT_VERSION = 1
HEADER_SIZE = 8
FLOAT_SIZE = 4
FLOAT_DTYPE = np.dtype("<f4")


@dataclass
class Corpus:
    """Raw local features of paired images and texts."""

    d_in_image: int
    d_in_text: int
    images: list[np.ndarray]
    texts: list[np.ndarray]
    text_image: np.ndarray  # image index of every text
    image_ids: list[int] = field(default_factory=list)
    text_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.image_ids:
            self.image_ids = list(range(len(self.images)))
        if not self.text_ids:
            self.text_ids = list(range(len(self.texts)))
        self.text_image = np.asarray(self.text_image, dtype=np.int64)

    @property
    def num_images(self) -> int:
        return len(self.images)

    @property
    def num_texts(self) -> int:
        return len(self.texts)

    def texts_of(self, image_index: int) -> np.ndarray:
        return np.flatnonzero(self.text_image == image_index)

    def ground_truth(self) -> list[set[int]]:
        """Matched text indices for every image."""
        return [set(int(t) for t in self.texts_of(i)) for i in range(self.num_images)]

    def subset(self, image_indices: Sequence[int]) -> "Corpus":
        """Corpus restricted to the given images and all of their texts."""
        images, texts, text_image, image_ids, text_ids = [], [], [], [], []
        for new_index, old_index in enumerate(image_indices):
            images.append(self.images[old_index])
            image_ids.append(self.image_ids[old_index])
            for t in self.texts_of(old_index):
                texts.append(self.texts[t])
                text_ids.append(self.text_ids[t])
                text_image.append(new_index)
        return Corpus(self.d_in_image, self.d_in_text, images, texts, np.array(text_image), image_ids, text_ids)


@dataclass
class CorpusManifest:
    """Parsed manifest with byte offsets into the blob."""

    version: int
    d_in_image: int
    d_in_text: int
    instances: list[dict]
    texts: list[dict]
    blob: str = "corpus.bin"

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "d_in_image": self.d_in_image,
            "d_in_text": self.d_in_text,
            "blob": self.blob,
            "instances": self.instances,
            "texts": self.texts,
        }


def write_corpus(corpus: Corpus, manifest_path: str | Path) -> CorpusManifest:
    """
    Write manifest + blob (blob sits next to the manifest).

    Args:
        corpus: Corpus to store
        manifest_path: Path of the JSON manifest

    Returns:
        The manifest that was written
    """
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")

    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    offset = HEADER_SIZE
    instances = []
    for i, features in enumerate(corpus.images):
        data = np.ascontiguousarray(features, dtype=FLOAT_DTYPE).tobytes()
        instances.append(
            {
                "id": int(corpus.image_ids[i]),
                "image_count": int(features.shape[0]),
                "offset": offset,
                "text_ids": [int(corpus.text_ids[t]) for t in corpus.texts_of(i)],
            }
        )
        chunks.append(data)
        offset += len(data)

    texts = []
    for t, features in enumerate(corpus.texts):
        data = np.ascontiguousarray(features, dtype=FLOAT_DTYPE).tobytes()
        texts.append(
            {
                "id": int(corpus.text_ids[t]),
                "word_count": int(features.shape[0]),
                "offset": offset,
                "image_id": int(corpus.image_ids[corpus.text_image[t]]),
            }
        )
        chunks.append(data)
        offset += len(data)

    manifest = CorpusManifest(FORMAT_VERSION, corpus.d_in_image, corpus.d_in_text, instances, texts, blob_path.name)
    blob_path.parent.mkdir(parents=True, exist_ok=True)
    with open(blob_path, "wb") as f:
        f.write(b"".join(chunks))
    write_json(manifest_path, manifest.to_dict())
    logger.info(f"Corpus written: {len(instances)} images, {len(texts)} texts -> {manifest_path}")
    return manifest


def _parse_manifest(data: dict) -> CorpusManifest:
    try:
        manifest = CorpusManifest(
            version=int(data["version"]),
            d_in_image=int(data["d_in_image"]),
            d_in_text=int(data["d_in_text"]),
            instances=list(data["instances"]),
            texts=list(data["texts"]),
            blob=str(data.get("blob", "corpus.bin")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusFormatError(f"Malformed manifest: {e}") from e
    if manifest.version != FORMAT_VERSION:
        raise CorpusFormatError(f"Unsupported manifest version {manifest.version}")
    return manifest


def _read_matrix(blob: bytes, offset: int, rows: int, cols: int, what: str) -> np.ndarray:
    if rows < 1:
        raise CorpusFormatError(f"{what} has no rows", offset)
    if offset < HEADER_SIZE:
        raise CorpusFormatError(f"{what} offset inside the header", offset)
    end = offset + rows * cols * FLOAT_SIZE
    if end > len(blob):
        raise CorpusFormatError(f"{what} extends past the end of the blob ({len(blob)} bytes)", end)
    return np.frombuffer(blob, dtype=FLOAT_DTYPE, count=rows * cols, offset=offset).reshape(rows, cols).copy()


def _as_int(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _entry_fields(entry: dict, kind: str, index: int, *keys: str) -> list[int]:
    """Integer fields of one manifest entry."""
    try:
        return [_as_int(entry[key]) for key in keys]
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusFormatError(f"Malformed {kind} entry {index}: {e!r}") from e


def read_corpus(manifest_path: str | Path) -> tuple[CorpusManifest, Corpus]:
    """
    Read and validate a manifest + blob pair.

    Args:
        manifest_path: Path of the JSON manifest

    Returns:
        (manifest, corpus); nothing is returned on any format error

    Raises:
        CorpusFormatError: Bad magic, version, offsets or blob extent
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = _parse_manifest(json.load(f))
    except json.JSONDecodeError as e:
        raise CorpusFormatError(f"Manifest is not valid JSON: {e.msg}", e.pos) from e

    with open(manifest_path.parent / manifest.blob, "rb") as f:
        blob = f.read()

    if len(blob) < HEADER_SIZE:
        raise CorpusFormatError("Blob shorter than its header", len(blob))
    if blob[:4] != MAGIC:
        raise CorpusFormatError(f"Bad magic {blob[:4]!r}", 0)
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"Unsupported blob version {version}", 4)

    spans = []
    images, image_ids, text_lists = [], [], []
    for index, entry in enumerate(manifest.instances):
        image_id, rows, offset = _entry_fields(entry, "instance", index, "id", "image_count", "offset")
        try:
            text_lists.append([_as_int(t) for t in entry.get("text_ids", [])])
        except (TypeError, ValueError) as e:
            raise CorpusFormatError(f"Malformed text_ids of instance {index}: {e!r}") from e
        images.append(_read_matrix(blob, offset, rows, manifest.d_in_image, f"image {image_id}"))
        image_ids.append(image_id)
        spans.append((offset, offset + rows * manifest.d_in_image * FLOAT_SIZE))

    id_to_image = {image_id: index for index, image_id in enumerate(image_ids)}
    texts, text_ids, text_image = [], [], []
    for index, entry in enumerate(manifest.texts):
        text_id, rows, offset, image_id = _entry_fields(entry, "text", index, "id", "word_count", "offset", "image_id")
        texts.append(_read_matrix(blob, offset, rows, manifest.d_in_text, f"text {text_id}"))
        text_ids.append(text_id)
        if image_id not in id_to_image:
            raise CorpusFormatError(f"Text {text_id} refers to unknown image {image_id}", offset)
        text_image.append(id_to_image[image_id])
        spans.append((offset, offset + rows * manifest.d_in_text * FLOAT_SIZE))

    # Matrices must tile the blob after the header exactly
    cursor = HEADER_SIZE
    for start, end in sorted(spans):
        if start < cursor:
            raise CorpusFormatError("Overlapping matrices", start)
        if start > cursor:
            raise CorpusFormatError("Unreferenced bytes between matrices", cursor)
        cursor = end
    if cursor != len(blob):
        raise CorpusFormatError(f"Manifest covers {cursor} bytes but blob has {len(blob)}", cursor)

    for index, ids in enumerate(text_lists):
        declared = set(ids)
        actual = {text_ids[t] for t, owner in enumerate(text_image) if owner == index}
        if declared and declared != actual:
            raise CorpusFormatError(f"Image {image_ids[index]} text_ids disagree with the text list")

    corpus = Corpus(manifest.d_in_image, manifest.d_in_text, images, texts, np.array(text_image, dtype=np.int64), image_ids, text_ids)
    logger.info(f"Corpus loaded: {corpus.num_images} images, {corpus.num_texts} texts from {manifest_path}")
    return manifest, corpus


def require_images(corpus: Corpus, count: int, what: str) -> None:
    if corpus.num_images < count:
        raise UsageError(f"{what} needs at least {count} images, corpus has {corpus.num_images}")
