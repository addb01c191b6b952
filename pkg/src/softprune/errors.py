"""Exception hierarchy shared by the solver, planner and engine."""


class SoftPruneError(Exception):
    pass


class Infeasible(SoftPruneError):
    """No selection satisfies the cost constraint."""


class EmptyFront(Infeasible):
    """Every item of a group was filtered out by the capacity."""


class TooLarge(SoftPruneError):
    pass


class CapacityOverflow(SoftPruneError):
    pass


class ShapeMismatch(SoftPruneError, ValueError):
    pass


class MissingImportance(SoftPruneError, KeyError):
    pass


class LUTMiss(SoftPruneError, KeyError):
    def __init__(self, layer_id, p_in, p_out):
        super().__init__(f"no LUT entry for layer {layer_id!r} at (p_in={p_in}, p_out={p_out})")
        self.layer_id = layer_id
        self.p_in = p_in
        self.p_out = p_out

    def __str__(self):
        return self.args[0]


class StaleGradient(SoftPruneError, RuntimeError):
    pass


class DegenerateBatch(SoftPruneError, ValueError):
    pass


class ConfigError(SoftPruneError, ValueError):
    pass
