class MobipowerError(Exception):
    pass


class ConfigError(MobipowerError):
    """
    Raised for an invalid or unreadable run configuration. `field` names the
    offending key.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")

    def __reduce__(self):
        return ConfigError, (self.field, self.message)


class NumericError(MobipowerError):
    pass


class CheckpointError(MobipowerError):
    pass


class AllocatorError(MobipowerError):
    pass
