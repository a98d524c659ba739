import sys
from pathlib import Path

import pytest

BASE_DIR = Path(__file__).resolve().parents[1]


def main(argv=None):
    extra = list(sys.argv[1:] if argv is None else argv)
    return int(pytest.main([str(BASE_DIR / "tests"), "-q", *extra]))


if __name__ == "__main__":
    sys.exit(main())
