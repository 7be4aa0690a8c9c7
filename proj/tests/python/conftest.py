import os
import pathlib
import shutil

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def configs():
    return ROOT / "configs"


@pytest.fixture(scope="session")
def cli():
    exe = os.environ.get("OPTOCOOL_CLI") or shutil.which("optocool")
    if not exe:
        pytest.skip("optocool executable not available")
    return exe
