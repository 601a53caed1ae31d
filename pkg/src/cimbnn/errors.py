"""Exception hierarchy shared by every module."""


class CimBnnError(Exception):
    pass


class DimensionError(CimBnnError, ValueError):
    pass


class ParameterError(CimBnnError, ValueError):
    pass


class ValidationError(CimBnnError, ValueError):
    pass


class FormatError(CimBnnError, ValueError):
    pass


class FoldError(CimBnnError, ValueError):
    """Batch-norm channel with gamma == 0 cannot be folded into a threshold."""


class FlippedCharacterizationError(CimBnnError):
    """A bias point whose cells lose their stored state cannot be used."""

    def __init__(self, v_wl, v_bl):
        super().__init__(f"Flipped: bias point V_WL={v_wl} V_BL={v_bl} flips SRAM cells")
        self.v_wl = v_wl
        self.v_bl = v_bl


class NoViablePointError(CimBnnError):
    pass
