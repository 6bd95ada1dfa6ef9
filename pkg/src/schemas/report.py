from pydantic import BaseModel, Field, ConfigDict
from typing import Optional, List, Dict, Any
from datetime import datetime
from enum import Enum
import math


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


class TestReport(BaseModel):
    """Outcome of one statistical or exact check"""

    __test__ = False

    name: str
    statistic: float
    threshold: Optional[float] = None
    p_value: Optional[float] = None
    mc_std_error: Optional[float] = None
    verdict: Verdict
    seeds: List[int] = Field(default_factory=list)
    sizes: Dict[str, int] = Field(default_factory=dict)
    details: Dict[str, Any] = Field(default_factory=dict)
    config_digest: Optional[str] = None

    model_config = ConfigDict(use_enum_values=False)

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS

    @classmethod
    def against_threshold(cls, name: str, statistic: float, threshold: float, **kwargs):
        """Pass when statistic <= threshold; NaN statistics are inconclusive"""
        if not math.isfinite(statistic):
            verdict = Verdict.INCONCLUSIVE
        else:
            verdict = Verdict.PASS if statistic <= threshold else Verdict.FAIL
        return cls(name=name, statistic=statistic, threshold=threshold, verdict=verdict, **kwargs)

    @classmethod
    def against_p_value(
        cls, name: str, statistic: float, p_value: float, alpha: float = 0.01, **kw
    ):
        """Pass when the p-value clears the floor alpha"""
        if not math.isfinite(p_value):
            verdict = Verdict.INCONCLUSIVE
        else:
            verdict = Verdict.PASS if p_value >= alpha else Verdict.FAIL
        return cls(
            name=name, statistic=statistic, threshold=alpha, p_value=p_value, verdict=verdict, **kw
        )

    @classmethod
    def inconclusive(cls, name: str, reason: str, **kwargs):
        details = dict(kwargs.pop("details", {}))
        details["reason"] = reason
        return cls(
            name=name,
            statistic=float("nan"),
            verdict=Verdict.INCONCLUSIVE,
            details=details,
            **kwargs,
        )


class GammaDiagnostic(BaseModel):
    """Per-step summary of the gamma regression"""

    step: int
    time: float
    queries: int
    design_size: int
    mean_stratum_size: float
    fallbacks: int


class OutputFile(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """Record of one pipeline execution"""

    run_id: str
    kind: str
    check: Optional[str] = None
    config: Dict[str, Any]
    config_digest: str
    tool_version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    files: List[OutputFile] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    verdict: Optional[Verdict] = None
    exit_status: int = 0
