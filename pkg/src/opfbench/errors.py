"""Exception hierarchy shared by every opfbench module."""


class OpfBenchError(Exception):
    """Base class for all errors raised by opfbench."""


# case parsing ---------------------------------------------------------------


class CaseFormatError(OpfBenchError):
    """A case file could not be turned into a valid RawCase."""


class MissingTable(CaseFormatError):
    def __init__(self, table):
        self.table = table
        super().__init__(f"case text has no '{table}' block")


class MalformedRow(CaseFormatError):
    def __init__(self, table, line, reason):
        self.table = table
        self.line = line
        super().__init__(f"malformed row in '{table}' at line {line}: {reason}")


class DuplicateBusId(CaseFormatError):
    def __init__(self, bus_id, line=None):
        self.bus_id = bus_id
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"bus id {bus_id} defined more than once{where}")


class NoSlackBus(CaseFormatError):
    def __init__(self, count=0):
        self.count = count
        if count == 0:
            msg = "bus table has no slack (type 3) bus"
        else:
            msg = f"bus table has {count} slack buses, exactly one is required"
        super().__init__(msg)


class UnsupportedCostModel(CaseFormatError):
    pass


# network construction -------------------------------------------------------


class NetworkError(OpfBenchError):
    pass


class IslandedBus(NetworkError):
    def __init__(self, bus_ids):
        self.bus_ids = list(bus_ids)
        super().__init__(f"buses not connected to the slack bus: {self.bus_ids}")


class InvalidLimits(NetworkError):
    pass


# solvers --------------------------------------------------------------------


class SolverError(OpfBenchError):
    pass


class NonConvergence(SolverError):
    def __init__(self, iterations, mismatch, what="power flow"):
        self.iterations = iterations
        self.mismatch = mismatch
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(final mismatch {mismatch:.3e})"
        )


class SingularJacobian(SolverError):
    pass


class Infeasible(SolverError):
    def __init__(self, msg="problem is infeasible", certificate=None):
        self.certificate = certificate
        super().__init__(msg)


class Unbounded(SolverError):
    def __init__(self, msg="problem is unbounded", direction=None):
        self.direction = direction
        super().__init__(msg)


class MaxIterations(SolverError):
    def __init__(self, iterations, residuals=None):
        self.iterations = iterations
        self.residuals = residuals or {}
        super().__init__(f"interior point stopped after {iterations} iterations: {self.residuals}")


# learning / data -------------------------------------------------------------


class EmptyTrainSet(OpfBenchError):
    pass


class LayoutMismatch(OpfBenchError):
    pass


class ConfigMismatch(OpfBenchError):
    pass


class DegenerateDesign(UserWarning):
    """Least-squares design is rank deficient; a minimum-norm fit was returned."""

    def __init__(self, rank, cols):
        self.rank = rank
        self.cols = cols
        super().__init__(f"design matrix has rank {rank} < {cols} columns; returning minimum-norm solution")


class ZeroVariance(OpfBenchError):
    pass


class Divergence(OpfBenchError):
    def __init__(self, epoch, step, losses):
        self.epoch = epoch
        self.step = step
        self.losses = list(losses)
        super().__init__(f"training loss became non-finite at epoch {epoch}, step {step}")


class RetryBudgetExhausted(OpfBenchError):
    def __init__(self, converged, attempted, wanted):
        self.converged = converged
        self.attempted = attempted
        self.wanted = wanted
        rate = converged / attempted if attempted else 0.0
        super().__init__(
            f"only {converged}/{wanted} scenarios converged after {attempted} draws "
            f"(convergence rate {rate:.1%})"
        )


class DatasetError(OpfBenchError):
    pass


class CorruptFile(DatasetError):
    pass


class FingerprintMismatch(DatasetError):
    def __init__(self, expected, found, what="artifact"):
        self.expected = expected
        self.found = found
        super().__init__(f"{what} was built for case {found[:12]}, expected {expected[:12]}")


class SchemaVersionMismatch(DatasetError):
    pass
