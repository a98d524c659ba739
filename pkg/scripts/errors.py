EXIT_OK = 0
EXIT_FLAG_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_RUN_ERROR = 4


class StitchLabError(RuntimeError):
    pass


class ConfigError(StitchLabError):
    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        location = ""
        if path is not None:
            location = str(path)
            if line is not None:
                location += f":{line}"
                if column is not None:
                    location += f":{column}"
            location += ": "
        super().__init__(f"{location}{message}")


class ResourceCapError(StitchLabError):
    pass


class GeometryError(StitchLabError):
    pass


class KernelAmbiguityError(StitchLabError):
    pass


class EigensolverError(StitchLabError):
    pass


class ClassMError(StitchLabError):
    pass


class ConvolutionError(StitchLabError):
    pass


class StoreInconsistentError(StitchLabError):
    pass
