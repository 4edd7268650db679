# DIAS image-text matching package
