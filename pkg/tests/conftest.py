# ensures the tests directory is importable (for helpers.py)
