"""Version information for circle-qka."""

__version__ = "0.3.0"
__author__ = "Sravan Kumar Rekandar"
__email__ = "sravankumarrekandar@example.com"
__description__ = (
    "A deterministic simulator and benchmark for three-party circle-type "
    "quantum key agreement with Bell states and dense coding"
)
