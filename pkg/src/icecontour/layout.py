"""Output directory layout shared by the simulator and the pipeline stages."""
from pathlib import Path


def lead_label(lead) -> str:
    return f"{float(lead):g}"


def stage_dir(out, stage, year=None, month=None, lead=None) -> Path:
    """``out/stage[/year[/MM[/lead]]]``."""
    p = Path(out) / stage
    if year is not None:
        p = p / str(int(year))
        if month is not None:
            p = p / f"{int(month):02d}"
            if lead is not None:
                p = p / lead_label(lead)
    return p


def init_month(month: int, lead: float) -> tuple:
    """Last fully observed month before a forecast of ``month`` at ``lead``.

    Returns ``(init_month, year_offset)``; the offset is -1 when the
    initialization month falls in the previous calendar year.
    """
    back = int(round(lead + 0.5))
    k = month - 1 - back
    return k % 12 + 1, k // 12
