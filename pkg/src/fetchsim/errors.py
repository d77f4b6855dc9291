"""Exception hierarchy shared across the package."""


class FetchSimError(Exception):
    """Base class for all errors raised by this package."""


class SceneGenerationError(FetchSimError):
    """Scene constraints could not be satisfied within the retry budget."""


class EpisodeGenerationError(FetchSimError):
    """No feasible episode exists for the requested scene/phase/seed."""


class ActionError(FetchSimError):
    """An action violated a precondition (mode, joint band, gripper state)."""


class PlanningError(FetchSimError):
    """The planner cannot make progress (unreachable goal, exhausted frontier)."""


class MapBoundsError(FetchSimError):
    """The robot left the fixed-origin map; the map does not scroll."""


class WorkspaceError(FetchSimError):
    """A manipulation target lies outside the arm's reachable volume."""


class ProtocolError(FetchSimError):
    """A wire-protocol message was malformed or violated framing rules."""
