"""Cross-frequency continuous-wave acoustic tracking on a voice-assistant mic array.

Two ultrasonic tones (one on a moving beacon, one next to the array) mix in
the microphones' square-law response to an audible line at their difference
frequency.  Its phase tracks the beacon's range to each microphone.
"""
__version__ = "0.1.0"

from .errors import CFCWError, StageError  # noqa: F401
