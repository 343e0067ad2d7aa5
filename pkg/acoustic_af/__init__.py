"""
Acoustic atrial fibrillation screening.

Near-ultrasonic carriers played from a phone speaker are reflected by the
wrist; the carrier phase follows the radial pulse. The package synthesizes
such recordings, extracts and purifies the pulse wave and classifies 30 s
segments as AF or non-AF.
"""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
