from __future__ import annotations

import pytest

from pqeval import CategoryTable


@pytest.fixture(scope="session")
def cats() -> CategoryTable:
    return CategoryTable.default()
