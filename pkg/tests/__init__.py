# tests/__init__.py
# Makes "tests" a package so test modules with equal names in subfolders do not clash.
