import datetime
import logging
import os
from fractions import Fraction
from math import ceil, floor

from .config import config

# --- Logging Setup ---
logging.basicConfig(level=config.get("logging_level", logging.INFO),
                    format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger("elemdiff")

if config.get("log_file_name"):
    os.makedirs("results", exist_ok=True)
    timestamp = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    file_handler = logging.FileHandler(os.path.join("results", f"{config['log_file_name']}_{timestamp}.txt"))
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.addHandler(file_handler)


# --- Exact arithmetic helpers ---
def ceil_fraction(value: Fraction) -> int:
    return ceil(Fraction(value))


def floor_fraction(value: Fraction) -> int:
    return floor(Fraction(value))


def format_fraction(value: Fraction) -> str:
    """
    Renders an exact rational the way the text format reads it back:
    integers plainly, terminating fractions as decimals, anything else as p/q.
    """
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives)
    scaled = abs(value) * 10 ** digits
    text = str(scaled.numerator // scaled.denominator).rjust(digits + 1, "0")
    sign = "-" if value < 0 else ""
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


