"""Exception and warning classes shared across the package."""


class ViscoslabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ViscoslabError, ValueError):
    pass


class ResolutionError(ConfigurationError):
    pass


class CapabilityError(ViscoslabError):
    """A derivative order beyond what the stencils support was requested."""


class DegeneracyError(ViscoslabError):
    """det of the deformation gradient fell below the floor.

    Carries the offending value and its location so a driver can report
    it as a blow-up event.
    """

    def __init__(self, value, location, t=None):
        self.value = float(value)
        self.location = tuple(int(i) for i in location)
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        super().__init__(f"min J = {self.value:.3e} at index {self.location}{where}")


class DivergenceError(ViscoslabError):
    def __init__(self, value, ceiling, t=None):
        self.value = float(value)
        self.ceiling = float(ceiling)
        self.t = t
        super().__init__(f"state norm {self.value:.3e} exceeded ceiling {self.ceiling:.3e}")


class DensityRangeError(ViscoslabError):
    pass


class IllPosedError(ViscoslabError):
    def __init__(self, wavevector, detail=""):
        self.wavevector = tuple(float(x) for x in wavevector)
        super().__init__(f"singular mode system at wavevector {self.wavevector} {detail}".rstrip())


class FitDomainError(ViscoslabError, ValueError):
    pass


class DensityRangeWarning(UserWarning):
    pass


class JacobianBandWarning(UserWarning):
    """J left the monitored band [J_min, J_max]."""
