"""Online gradient episodic memory for boundary-free continual learning."""

__version__ = "0.1.0"
