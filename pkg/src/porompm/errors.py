"""Exception types raised by the solver stack."""


class PoroMPMError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PoroMPMError):
    pass


class DomainEscapeError(PoroMPMError):
    def __init__(self, particle, axis, position):
        self.particle = int(particle)
        self.axis = int(axis)
        self.position = float(position)
        super().__init__(f"particle {self.particle} left the grid along axis {self.axis} (x={self.position:.6g})")


class DegenerateSupportError(PoroMPMError):
    def __init__(self, particles):
        self.particles = list(map(int, particles))
        head = ", ".join(map(str, self.particles[:8]))
        super().__init__(f"singular moment matrix for particle(s) {head}")


class InvalidPorosityError(PoroMPMError):
    pass


class CoverageError(PoroMPMError):
    pass


class AssemblyError(PoroMPMError):
    def __init__(self, term, particle=None):
        self.term = term
        self.particle = particle
        where = "" if particle is None else f" at particle {particle}"
        super().__init__(f"non-finite value in {term}{where}")


class LinearSolverError(PoroMPMError):
    pass


class NonConvergenceError(PoroMPMError):
    def __init__(self, history):
        self.history = history
        super().__init__(f"Newton did not converge in {len(history.get('c_rel', []))} iterations")


class EmptyDomainError(PoroMPMError):
    pass


class OracleError(PoroMPMError):
    pass
