import os
from typing import List, Mapping, Optional

from dotenv import load_dotenv

from ml.rl.qlearning import QConfig
from pmem.errors import ConfigError

# Load environment variables
load_dotenv()

ENV_PREFIX = "PMCHECK_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    """Configuration for the PM crash-consistency toolkit"""

    def __init__(self, environ: Optional[Mapping[str, str]] = None):
        self._env = os.environ if environ is None else environ
        self._problems: List[str] = []

        # Logging
        self.LOG_LEVEL = self._get('LOG_LEVEL', 'INFO').upper()
        self.LOG_JSON = self._get('LOG_JSON', 'false').lower() == 'true'

        # Crash enumeration
        self.CRASH_CAP = self._int('CRASH_CAP', 20)
        self.WORKERS = self._int('WORKERS', 1)

        # Workloads
        self.SEED = self._int('SEED', 0)
        self.LEVEL_EXPONENT = self._int('LEVEL_EXPONENT', 3)

        # Exploration
        self.MAX_DEPTH = self._int('MAX_DEPTH', 8)
        self.REWARD_BUG = self._float('REWARD_BUG', 10.0)
        self.REWARD_SITE = self._float('REWARD_SITE', 1.0)
        self.QL_ALPHA = self._float('QL_ALPHA', 0.5)
        self.QL_GAMMA = self._float('QL_GAMMA', 0.9)
        self.QL_EPSILON = self._float('QL_EPSILON', 0.1)
        self.REPLAY_CAPACITY = self._int('REPLAY_CAPACITY', 256)
        self.BATCH_SIZE = self._int('BATCH_SIZE', 8)

    def _get(self, name: str, default: str) -> str:
        return self._env.get(ENV_PREFIX + name, default)

    def _int(self, name: str, default: int) -> int:
        raw = self._env.get(ENV_PREFIX + name)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self._problems.append(f"{ENV_PREFIX}{name}={raw!r} is not an integer")
            return default

    def _float(self, name: str, default: float) -> float:
        raw = self._env.get(ENV_PREFIX + name)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self._problems.append(f"{ENV_PREFIX}{name}={raw!r} is not a number")
            return default

    def qconfig(self, seed: Optional[int] = None, alpha: Optional[float] = None,
                gamma: Optional[float] = None, epsilon: Optional[float] = None) -> QConfig:
        """Q-learning parameters, with optional overrides"""
        return QConfig(
            alpha=self.QL_ALPHA if alpha is None else alpha,
            gamma=self.QL_GAMMA if gamma is None else gamma,
            epsilon=self.QL_EPSILON if epsilon is None else epsilon,
            replay_capacity=self.REPLAY_CAPACITY,
            batch_size=self.BATCH_SIZE,
            seed=self.SEED if seed is None else seed,
        )

    def validate(self) -> bool:
        """Validate every setting; raises ConfigError listing all problems"""
        problems = list(self._problems)
        if self.LOG_LEVEL not in LOG_LEVELS:
            problems.append(f"{ENV_PREFIX}LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")
        if self.CRASH_CAP < 0:
            problems.append(f"{ENV_PREFIX}CRASH_CAP must be >= 0")
        if self.WORKERS < 1:
            problems.append(f"{ENV_PREFIX}WORKERS must be >= 1")
        if self.SEED < 0:
            problems.append(f"{ENV_PREFIX}SEED must be >= 0")
        if not 1 <= self.LEVEL_EXPONENT <= 24:
            problems.append(f"{ENV_PREFIX}LEVEL_EXPONENT must be in [1, 24]")
        if self.MAX_DEPTH < 0:
            problems.append(f"{ENV_PREFIX}MAX_DEPTH must be >= 0")
        if self.REWARD_BUG < 0 or self.REWARD_SITE < 0:
            problems.append(f"{ENV_PREFIX}REWARD_BUG and {ENV_PREFIX}REWARD_SITE must be >= 0")

        try:
            self.qconfig().validate()
        except ConfigError as e:
            problems.append(str(e))

        if problems:
            raise ConfigError(f"Invalid configuration: {'; '.join(problems)}")
        return True
