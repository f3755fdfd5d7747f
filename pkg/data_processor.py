"""
Data processing module v2.0
Wasserstein DRMDP certification toolkit
Episode CSV reading, validation, cleaning and grouping into episode logs
"""

import logging
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from errors import ParameterError, StructuralError, WdrmdpError
from estimation import EpisodeLog, simulate_episode
from mdp_core import TabularMdp, TransitionModel

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Dims = Union[TabularMdp, Tuple[int, int]]
# episode ids are cast to int64
EPISODE_ID_LIMIT = 2 ** 62


def _dims(dims: Dims) -> Tuple[int, int]:
    if isinstance(dims, TabularMdp):
        return dims.num_states, dims.num_actions
    num_states, num_actions = (int(x) for x in dims)
    if num_states < 1 or num_actions < 1:
        raise ParameterError(f"dimensions must be positive, got {dims}", "data_processor")
    return num_states, num_actions


class EpisodeValidator:
    """Validates episode tables against the expected header and index ranges"""

    REQUIRED_COLUMNS = ["episode", "s", "a", "s_next"]

    @staticmethod
    def validate_columns(df: pd.DataFrame) -> Tuple[bool, List[str]]:
        """
        Check the header

        Args:
            df: raw table

        Returns:
            (valid, missing columns)
        """
        missing = [col for col in EpisodeValidator.REQUIRED_COLUMNS if col not in df.columns]
        return len(missing) == 0, missing

    @staticmethod
    def validate_integers(df: pd.DataFrame) -> List[str]:
        """Rows whose fields are missing or not integers, as 'row k: column=value'"""
        problems = []
        for col in EpisodeValidator.REQUIRED_COLUMNS:
            numeric = pd.to_numeric(df[col], errors="coerce")
            bad = numeric.isna() | (numeric != np.floor(numeric))
            for idx in np.flatnonzero(bad.to_numpy()):
                problems.append(f"row {idx + 1}: {col}={df[col].iloc[idx]!r}")
        return problems

    @staticmethod
    def validate_ranges(df: pd.DataFrame, num_states: int, num_actions: int) -> List[str]:
        """
        Rows with s, s_next outside [0, |S|), a outside [0, |A|) or an episode id beyond int64

        Expects the float table of EpisodeCleaner.to_numbers; values are quoted before any integer cast
        """
        problems = []
        bounds = {"s": (0, num_states), "a": (0, num_actions), "s_next": (0, num_states),
                  "episode": (-EPISODE_ID_LIMIT, EPISODE_ID_LIMIT)}
        for col, (low, high) in bounds.items():
            values = df[col].to_numpy(dtype=float)
            for idx in np.flatnonzero((values < low) | (values >= high)):
                problems.append(f"row {idx + 1}: {col}={values[idx]:g} outside [{low}, {high})")
        return problems


class EpisodeCleaner:
    """Normalizes raw episode tables"""

    @staticmethod
    def strip_text(df: pd.DataFrame) -> pd.DataFrame:
        df_cleaned = df.copy()
        df_cleaned.columns = [str(c).strip() for c in df_cleaned.columns]
        for col in df_cleaned.columns:
            df_cleaned[col] = df_cleaned[col].astype(str).str.strip()
        return df_cleaned

    @staticmethod
    def to_numbers(df: pd.DataFrame) -> pd.DataFrame:
        df_cleaned = df[EpisodeValidator.REQUIRED_COLUMNS].copy()
        for col in EpisodeValidator.REQUIRED_COLUMNS:
            df_cleaned[col] = pd.to_numeric(df_cleaned[col]).astype(float)
        return df_cleaned

    @staticmethod
    def to_integers(df: pd.DataFrame) -> pd.DataFrame:
        return df.astype(np.int64)


class EpisodeTransformer:
    """Turns validated tables into episode logs and back"""

    @staticmethod
    def group_episodes(df: pd.DataFrame) -> List[EpisodeLog]:
        """One log per episode id, in order of first appearance; row order kept within an episode"""
        logs = []
        for episode_id, group in df.groupby("episode", sort=False):
            logs.append(EpisodeLog(int(episode_id), group[["s", "a", "s_next"]].to_numpy(dtype=int)))
        return logs

    @staticmethod
    def to_dataframe(logs: List[EpisodeLog]) -> pd.DataFrame:
        frames = [
            pd.DataFrame({"episode": log.episode_id, "s": log.transitions[:, 0],
                          "a": log.transitions[:, 1], "s_next": log.transitions[:, 2]})
            for log in logs
        ]
        if not frames:
            return pd.DataFrame(columns=EpisodeValidator.REQUIRED_COLUMNS)
        return pd.concat(frames, ignore_index=True)


def _raise_listed(problems: List[str], error_cls, label: str) -> None:
    if problems:
        message = f"{label}: {'; '.join(problems[:5])}"
        if len(problems) > 5:
            message += f" and {len(problems) - 5} more"
        raise error_cls(message, "data_processor")


def ingest_episodes(csv_path: str, dims: Dims) -> List[EpisodeLog]:
    """
    Read an `episode,s,a,s_next` CSV into episode logs

    Args:
        csv_path: file path
        dims: MDP or (|S|, |A|)

    Returns:
        logs grouped by episode id
    """
    num_states, num_actions = _dims(dims)
    try:
        raw = pd.read_csv(csv_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParameterError(f"{csv_path}: file is empty, expected header {','.join(EpisodeValidator.REQUIRED_COLUMNS)}",
                             "data_processor")
    df = EpisodeCleaner.strip_text(raw)
    is_valid, missing = EpisodeValidator.validate_columns(df)
    if not is_valid:
        raise ParameterError(f"{csv_path}: missing columns {', '.join(missing)}", "data_processor")
    if df.empty:
        return []
    _raise_listed(EpisodeValidator.validate_integers(df), ParameterError, "malformed rows")
    df = EpisodeCleaner.to_numbers(df)
    _raise_listed(EpisodeValidator.validate_ranges(df, num_states, num_actions), StructuralError, "index out of range")
    return EpisodeTransformer.group_episodes(EpisodeCleaner.to_integers(df))


def write_episodes(logs: List[EpisodeLog], csv_path: str) -> None:
    EpisodeTransformer.to_dataframe(logs).to_csv(csv_path, index=False)


class DataProcessor:
    """Coordinates episode ingestion for the orchestration layer"""

    def __init__(self):
        self.validator = EpisodeValidator()
        self.cleaner = EpisodeCleaner()
        self.transformer = EpisodeTransformer()

    def process_episode_file(self, csv_path: str, dims: Dims) -> Tuple[bool, Union[List[EpisodeLog], str], Dict]:
        """
        Ingest an episode file

        Args:
            csv_path: file path
            dims: MDP or (|S|, |A|)

        Returns:
            (success, logs or error message, statistics)
        """
        try:
            logs = ingest_episodes(csv_path, dims)
            lengths = [len(log) for log in logs]
            stats = {
                "episodes": len(logs),
                "transitions": int(sum(lengths)),
                "min_length": int(min(lengths)) if lengths else 0,
                "max_length": int(max(lengths)) if lengths else 0,
            }
            logger.info(f"ingested {stats['episodes']} episodes, {stats['transitions']} transitions from {csv_path}")
            return True, logs, stats
        except WdrmdpError as e:
            logger.error(f"episode ingestion failed: {e.describe()}")
            return False, e.describe(), {}
        except Exception as e:
            logger.error(f"episode ingestion failed: {str(e)}")
            return False, f"[data_processor] {str(e)}", {}

    def generate_mock_episodes(self, mdp: TabularMdp, p: TransitionModel, num_episodes: int = 5,
                               length: int = 50, seed: int = 42) -> List[EpisodeLog]:
        """Seeded synthetic episodes under a uniform random logging policy"""
        rng = np.random.default_rng(seed)
        return [simulate_episode(mdp, p, length, rng, episode_id=i) for i in range(num_episodes)]
