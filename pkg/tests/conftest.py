from __future__ import annotations

import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

# The jitted LCS kernel compiles on first call, which would trip the
# per-example deadline; property tests also reuse function-scoped tmp
# fixtures deliberately.
settings.register_profile(
    "factmeet",
    deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture],
)
settings.load_profile("factmeet")

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"
