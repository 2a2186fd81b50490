"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class; ``category`` is what the CLI prints on failure."""

    category = "error"


# trajectory ingest
class IngestError(PipelineError):
    category = "ingest"


class MissingColumn(IngestError):
    pass


class MalformedRow(IngestError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonContiguousFrames(IngestError):
    def __init__(self, track_id: int, message: str):
        super().__init__(f"track {track_id}: {message}")
        self.track_id = track_id


class AmbiguousDirection(IngestError):
    def __init__(self, track_id: int, message: str):
        super().__init__(f"track {track_id}: {message}")
        self.track_id = track_id


# detection / dataset
class NotNormalized(PipelineError):
    category = "detect"


class DatasetError(PipelineError):
    category = "dataset"


class WindowOutOfRange(DatasetError):
    pass


class TooShort(DatasetError):
    pass


class EmptyDataset(DatasetError):
    pass


class DegenerateStats(DatasetError):
    pass


class EmptyTestWarning(UserWarning):
    pass


# neural core / predictors
class ModelError(PipelineError):
    category = "model"


class ShapeMismatch(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


class WrongWindowLength(ModelError):
    pass


class UntrainedModel(ModelError):
    pass


class DegenerateHorizon(ModelError):
    pass


class CheckpointError(ModelError):
    pass


# evaluation
class EvaluationError(PipelineError):
    category = "evaluate"


class LengthMismatch(EvaluationError):
    pass


class EmptyInput(EvaluationError):
    pass


class DegenerateRange(EvaluationError):
    pass


class WindowUnderflow(EvaluationError):
    pass


# synthetic generation
class InfeasibleScript(PipelineError):
    category = "synth"


# cli
class ConfigInvalid(PipelineError):
    category = "config"


class UpstreamArtifactMissing(PipelineError):
    category = "upstream"
