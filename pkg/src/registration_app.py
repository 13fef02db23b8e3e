"""
Multiscale Registration - Command-line entry point
Usage:
    python -m src.registration_app match data/input/problems/similarity_2d.json data/input/configs/default.json -o data/output/match
    python -m src.registration_app check --filter sim
"""

import sys
from pathlib import Path

# Add the project root to Python path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.app.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
