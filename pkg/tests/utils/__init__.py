# This file makes the 'tests/utils' directory a Python package.