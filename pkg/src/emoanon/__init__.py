"""Speaker anonymization in embedding space with emotion compensation."""

__version__ = "0.1.0"

from .errors import DataError, DegenerateInputError, DimensionError, EmoAnonError, NumericalError  # noqa: E402
from .labels import EMOTIONS, NON_NEUTRAL, Emotion, map_nine_to_four  # noqa: E402
