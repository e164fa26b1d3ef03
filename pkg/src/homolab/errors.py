class HomolabError(ValueError):
    """Failure with a stable machine-readable ``code`` (e.g. ``"level-mismatch"``)."""

    def __init__(self, code, message=""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
