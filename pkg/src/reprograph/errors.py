"""Exception hierarchy shared across the engine.

Every error raised by library code derives from ReprographError so callers
can catch one base class at the CLI boundary and map it to an exit code.
"""

from __future__ import annotations


class ReprographError(Exception):
    """Base class for all engine errors."""


class GraphFormatError(ReprographError):
    """A graph file is malformed: bad JSON, missing fields, or bad record kind."""


class GraphIntegrityError(ReprographError):
    """A structurally valid graph violates an integrity rule.

    Examples: duplicate node ids, an edge endpoint that names a missing
    node, or a split violation under strict checking.
    """


class UnknownPaperError(ReprographError):
    """An operation referenced a paper id that is not in the graph."""


class BallotError(ReprographError):
    """A reviewer ballot is malformed or inconsistent with the candidate set."""


class AnnotationError(ReprographError):
    """A relation annotation failed structural or semantic validation."""


class EncapsulationError(ReprographError):
    """A unit declaration could not be turned into an API unit."""


class ExecutorUnavailableError(ReprographError):
    """No execution backend is available for a validation or run step."""


class PlanError(ReprographError):
    """A repair plan is malformed or could not be applied to a code version."""


class RefinementError(ReprographError):
    """The refinement loop was configured or driven inconsistently."""


class PartitionError(ReprographError):
    """Graph partitioning failed or produced an invalid cover."""


class KnowledgeBaseError(ReprographError):
    """A knowledge base file or entry is malformed."""


class TemplateError(ReprographError):
    """A prompt template is malformed or was rendered with missing variables."""


class AgentResponseError(ReprographError):
    """An agent response failed parsing or validation.

    ``kind`` distinguishes the three failure classes so callers can react
    differently: "malformed" (the text is not JSON at all), "schema" (JSON
    that violates the role's response schema), and "semantic" (schema-valid
    JSON that breaks a role-specific rule such as the reviewer permutation).
    """

    def __init__(self, message: str, *, kind: str = "schema") -> None:
        super().__init__(message)
        self.kind = kind


class AgentBackendError(ReprographError):
    """The agent backend transport failed or is misconfigured."""


class PipelineConfigError(ReprographError):
    """A run configuration is incomplete or inconsistent."""


class StageFailureError(ReprographError):
    """A pipeline stage failed in a way that aborts the run."""
