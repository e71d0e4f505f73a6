"""Exception hierarchy shared by every pipeline stage."""


class PathTraceError(Exception):
    """Base class; ``stage`` labels the pipeline stage that raised it."""

    stage = "core"


# geometry
class GeometryError(PathTraceError):
    stage = "geometry"


class InvalidPolyline(GeometryError):
    pass


class ChordTooShort(GeometryError):
    pass


class DegenerateOverlap(GeometryError):
    pass


class DegenerateBBox(GeometryError):
    pass


class OutOfRange(GeometryError):
    pass


# generator
class GeneratorError(PathTraceError):
    stage = "generator"


class FamilyInapplicable(GeneratorError):
    pass


class ConstructionFailed(GeneratorError):
    pass


class MutationInfeasible(GeneratorError):
    pass


class GrowthInfeasible(GeneratorError):
    pass


# renderer
class RendererError(PathTraceError):
    stage = "renderer"


class TooManyPoints(RendererError):
    pass


class PlacementInfeasible(RendererError):
    pass


class RasterBackendUnavailable(RendererError):
    pass


class RasterError(RendererError):
    pass


# taskset
class TasksetError(PathTraceError):
    stage = "taskset"


class LayoutInfeasible(TasksetError):
    pass


class SchemaMismatch(PathTraceError):
    stage = "io"


class MalformedLine(PathTraceError):
    stage = "io"

    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


# harness
class HarnessError(PathTraceError):
    stage = "harness"


class EndpointError(HarnessError):
    kind = "transport"


class TransportError(EndpointError):
    kind = "transport"


class AuthError(EndpointError):
    kind = "auth"


class Timeout(EndpointError):
    kind = "timeout"


# analysis
class AnalysisError(PathTraceError):
    stage = "analysis"


class JoinFailure(AnalysisError):
    def __init__(self, orphans):
        orphans = sorted(orphans)
        super().__init__(f"eval records without a matching task: {orphans}")
        self.orphans = orphans


class InsufficientData(AnalysisError):
    pass


class RankDeficient(AnalysisError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; offending columns: {list(columns)}")
        self.columns = list(columns)


class ValidationFailure(PathTraceError):
    stage = "validate"
