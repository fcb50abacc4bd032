class SilentwaveError(Exception):
    """Base class for all errors raised by silentwave."""


class SizingError(SilentwaveError, ValueError):
    """Input is too short (or otherwise mis-sized) for the requested operation."""


class ParameterError(SilentwaveError, ValueError):
    """A parameter is outside its valid domain."""


class UntokenizableWordError(SilentwaveError, ValueError):
    def __init__(self, word, char):
        super().__init__(f"word {word!r} contains character {char!r} outside the lexicon alphabet")
        self.word = word
        self.char = char


class StageError(SilentwaveError, RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
