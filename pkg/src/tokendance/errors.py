"""Exceptions shared by the training and inference entry points."""


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch


class UntrainedModelError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass
