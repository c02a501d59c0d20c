# tests/integration/__init__.py
# Tests that need the CICIDS2017 sample; enabled through CIA_IDS_DATASET.
