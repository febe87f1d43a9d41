"""Exception types shared across the toolchain."""


class CampaignError(Exception):
    """Base class for every error raised by simcampaign."""


class DefinitionError(CampaignError):
    """A parameters or factors file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PredicateSyntaxError(CampaignError, ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class UnknownFactorError(CampaignError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"unknown factor {self.name!r}"


class CampaignStateError(CampaignError):
    """The manifest is inconsistent or could not be persisted."""


class ResultParseError(CampaignError):
    def __init__(self, message, line=None, text=None):
        self.line = line
        self.text = text
        if line is not None:
            message = f"line {line}: {message}: {text!r}"
        super().__init__(message)


class OrphanRunError(CampaignError):
    def __init__(self, run_id):
        self.run_id = run_id
        super().__init__(f"no manifest entry for run {run_id!r}")


class AnalysisError(CampaignError):
    pass


class EmptyResultError(AnalysisError):
    pass


class IncompleteDesignError(AnalysisError):
    pass


class PointNotInSpaceError(CampaignError):
    pass
