"""Exception hierarchy shared by every engine module."""


class EngineError(Exception):
    """Base class for all engine failures."""


# graph-core
class GraphError(EngineError):
    pass


class CycleDetected(GraphError):
    def __init__(self, nodes):
        self.nodes = sorted(nodes)
        super().__init__(f"cycle among nodes: {', '.join(self.nodes)}")


class UnknownNode(GraphError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"unknown node: {node_id!r}")


class WouldCreateCycle(GraphError):
    pass


class InvalidAction(GraphError):
    """The action is well-formed but not applicable at this node."""


# knowledge
class KnowledgeError(EngineError):
    pass


class EmptyText(KnowledgeError):
    pass


class Unreachable(KnowledgeError):
    pass


class UnknownAgent(KnowledgeError):
    pass


class BadWeights(KnowledgeError):
    pass


# routing
class NoSuccessors(EngineError):
    pass


# llm-backend
class BackendError(EngineError):
    pass


class Exhausted(BackendError):
    def __init__(self, attempts, last_error):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"all {attempts} attempts failed; last error: {last_error}")


class NoScriptMatch(BackendError):
    pass


class MissingField(EngineError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing template field: {name}")


class TagNotFound(EngineError):
    def __init__(self, tag):
        self.tag = tag
        super().__init__(f"no <{tag}>...</{tag}> pair found")


# tools
class ToolError(EngineError):
    pass


class RestrictedImport(ToolError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"tool imports restricted module {name!r}")


class MissingEntryPoint(ToolError):
    pass


class NoCodeBlock(ToolError):
    pass


class EntryPointChanged(ToolError):
    pass


class TimedOutExhausted(ToolError):
    def __init__(self, attempts, timeout):
        self.attempts = attempts
        self.timeout = timeout
        super().__init__(f"tool timed out ({timeout}s) on all {attempts} attempts")


class CrashedExhausted(ToolError):
    def __init__(self, attempts, stderr):
        self.attempts = attempts
        self.stderr = stderr
        super().__init__(f"tool crashed on all {attempts} attempts: {stderr[-500:]}")


class UnknownTool(ToolError):
    pass


# environments
class EvaluationError(EngineError):
    pass


class NoNumberFound(EvaluationError):
    pass


class SandboxFailure(EvaluationError):
    pass


# execution / evolution
class InvalidAgent(EngineError):
    pass


class DisconnectedAggregator(EngineError):
    pass


class EmptyAggregation(EngineError):
    pass


class NodeFailure(EngineError):
    """Wraps a failure raised while working on one node."""

    def __init__(self, node_id, cause):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"node {node_id!r}: {type(cause).__name__}: {cause}")


# persistence / config
class ConfigError(EngineError):
    pass


class SchemaMismatch(EngineError):
    pass
