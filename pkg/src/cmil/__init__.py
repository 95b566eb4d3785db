"""Conservative model-based adversarial imitation learning at desk scale."""
__version__ = "0.1.0"
