"""Neural quantum support vector machines: simulator, network and trainers."""

from pathlib import Path

# Base paths
PACKAGE_DIR = Path(__file__).parent
PROJECT_DIR = PACKAGE_DIR.parent
DATA_DIR = PROJECT_DIR / "data"
RUNS_DIR = PROJECT_DIR / "runs"
