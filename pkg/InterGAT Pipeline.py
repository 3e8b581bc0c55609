import sys
from pathlib import Path

# Make the utils package importable when launched from another directory
sys.path.insert(0, str(Path(__file__).resolve().parent))

from utils.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
