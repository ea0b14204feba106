"""dB / dBm conversion helpers. 0 dBm is 1 mW exactly."""

import numpy as np


def db_from_ratio(ratio):
    """Power ratio -> dB."""
    return 10.0 * np.log10(ratio)


def ratio_from_db(db):
    """dB -> power ratio."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(p_dbm):
    """dBm -> W."""
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watt_to_dbm(p_w):
    """W -> dBm."""
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)
