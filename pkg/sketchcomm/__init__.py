"""
sketchcomm
Communication-optimal sketching and Nyström approximation over a simulated
message-passing fabric, with word-exact cost accounting.
"""

import os
import sys

# Add project root to path so `config` resolves when imported from scripts or tests
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

__version__ = "1.0.0"
