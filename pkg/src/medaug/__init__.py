"""Label-conditioned text augmentation with teacher-student KL noise control."""

__version__ = "0.1.0"
