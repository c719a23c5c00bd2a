"""Makes the helper modules next to the tests importable as plain modules."""

from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))
