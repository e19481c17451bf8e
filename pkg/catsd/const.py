"""Constants for the synthetic continual segmentation lab."""

from enum import StrEnum
from logging import Logger, getLogger

LOGGER: Logger = getLogger(__package__)

WEIGHTS_MAGIC = b"CATSDW"
WEIGHTS_VERSION = "1"

# Learning rates for the two time points
LR_T0 = 0.01
LR_T1 = 0.001

# Class-aware temperatures: old non-overlapping classes get the sharper T_o
T_OLD = 3.0
T_REGULAR = 4.0

POD_SCALES = (2, 4)
SHIFT_EPSILON = (0.0, 0.25, 0.75, 1.0)

IMAGE_SIZE = 64
MAX_INSTRUMENTS_PER_IMAGE = 3
N_BACKGROUND_VARIATIONS = 50
N_FOREGROUND_VARIATIONS = 100

BACKGROUND_ID = 0


class Method(StrEnum):
    """Continual learning methods the harness can train with."""

    FT = "ft"
    LWF = "lwf"
    TKD = "tkd"
    ILT = "ilt"
    POD = "pod"
    LOCALPOD = "localpod"
    CATSD = "catsd"


class Origin(StrEnum):
    """Where a background image comes from."""

    OPEN_SOURCE_REAL = "open-source-real"
    PROCEDURAL_SYNTHETIC = "procedural-synthetic"


class Pose(StrEnum):
    """Clasper pose of an instrument asset."""

    OPEN = "open"
    CLOSED = "closed"


class Split(StrEnum):
    """Dataset splits produced by the synthesizer."""

    T0_TRAIN = "t0_train"
    T1_TRAIN = "t1_train"
    EXEMPLAR = "exemplar"
    VAL = "val"
    TEST = "test"


# Reference taxonomy: 5 regular, 2 old and 2 new instrument classes
CLASS_NAMES: dict[int, str] = {
    0: "background",
    1: "bipolar forceps",
    2: "prograsp forceps",
    3: "large needle driver",
    4: "monopolar curved scissors",
    5: "ultrasound probe",
    6: "vessel sealer",
    7: "grasping retractor",
    8: "suction instrument",
    9: "clip applier",
}
REGULAR_CLASSES = (1, 2, 3, 4, 5)
OLD_CLASSES = (6, 7)
NEW_CLASSES = (8, 9)

ENV_THREADS = "CATSD_THREADS"
