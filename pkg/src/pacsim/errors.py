class PacsimError(Exception):
    """Base class for all errors raised by pacsim."""


class MalformedTensorError(PacsimError, ValueError):
    pass


class MalformedPlaneError(PacsimError, ValueError):
    pass


class ShapeMismatchError(PacsimError, ValueError):
    pass


class EncoderError(PacsimError, ValueError):
    pass


class ManifestError(PacsimError):
    pass


class LayerError(PacsimError):
    """A layer failed during a network run; ``layer_index`` says which one."""

    def __init__(self, layer_index, name, cause):
        self.layer_index = layer_index
        self.name = name
        self.cause = cause
        super().__init__(f"layer {layer_index} ({name}): {cause}")
