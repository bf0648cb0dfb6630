"""Exception types shared across the package."""


class DevmfError(Exception):
    """Base class for package-specific failures."""


class ParseError(DevmfError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class DuplicateEntryError(DevmfError):
    def __init__(self, index, line_no=None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate observation at index {index}{where}")
        self.index = index
        self.line_no = line_no


class ConfigError(DevmfError):
    """A configuration value is outside its allowed range or inconsistent."""


class DivergenceError(DevmfError):
    def __init__(self, epoch, detail=""):
        msg = f"training diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.epoch = epoch


class SingularSystemError(DevmfError):
    """The weighted normal equations are rank deficient."""


class DegenerateSliceError(DevmfError):
    def __init__(self, slice_index):
        super().__init__(f"sensor slice {slice_index} is constant; standard score undefined")
        self.slice_index = slice_index
