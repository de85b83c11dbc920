import sys
from pathlib import Path

from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

# Property tests draw the same examples on every run so results are reproducible.
settings.register_profile("repro", derandomize=True, database=None)
settings.load_profile("repro")
