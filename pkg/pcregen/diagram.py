"""
Diagram - Renders the regeneration pipeline's state graph
Graphviz when available, plain text otherwise
"""

from pathlib import Path
from typing import Dict, List, Optional, Union
import logging

try:
    from graphviz import Digraph
    GRAPHVIZ_AVAILABLE = True
except ImportError:
    GRAPHVIZ_AVAILABLE = False

from .regeneration import PIPELINE_FLOW, AblationConfig, PipelineStage


logger = logging.getLogger(__name__)

STATE_DESCRIPTIONS: Dict[PipelineStage, str] = {
    PipelineStage.IDLE: "Initial correspondences loaded",
    PipelineStage.SCREENING: "Second-order screening of the initial set",
    PipelineStage.SAMPLING: "Random seed sampling from the previous stage",
    PipelineStage.GROUPING: "Radius neighbourhoods around each seed",
    PipelineStage.REMATCHING: "Feature rematching inside each region",
    PipelineStage.LOCAL_CORRECTION: "Center-aware scoring and local re-snapping",
    PipelineStage.MERGING: "Union of accepted regions keyed on index pairs",
    PipelineStage.GLOBAL_CORRECTION: "Second-order pose hypotheses and global re-snapping",
    PipelineStage.COMPLETED: "Final correspondences and pose",
    PipelineStage.COLLAPSED: "No region survived; best-so-far kept",
}


def pipeline_edges(ablation: Optional[AblationConfig] = None):
    """Edges of the pipeline with disabled corrections bypassed"""
    ablation = ablation or AblationConfig()
    edges = []
    for source, target, label in PIPELINE_FLOW:
        if not ablation.local_enabled and PipelineStage.LOCAL_CORRECTION in (source, target):
            continue
        if not ablation.global_enabled and {PipelineStage.GLOBAL_CORRECTION, PipelineStage.SCREENING} & {source, target}:
            continue
        edges.append((source, target, label))
    if not ablation.local_enabled:
        edges.append((PipelineStage.REMATCHING, PipelineStage.MERGING, "local matches (uncorrected)"))
    if not ablation.global_enabled:
        edges.append((PipelineStage.MERGING, PipelineStage.SAMPLING, "next stage"))
        edges.append((PipelineStage.MERGING, PipelineStage.COMPLETED, "last stage"))
    return edges


def text_diagram(ablation: Optional[AblationConfig] = None) -> str:
    lines: List[str] = ["REGENERATION PIPELINE", "=" * 21, ""]
    for source, target, label in pipeline_edges(ablation):
        lines.append(f"    [{source.value.upper()}] --({label})--> [{target.value.upper()}]")
    lines.extend(["", "States:"])
    for state, description in STATE_DESCRIPTIONS.items():
        lines.append(f"  - {state.value.upper()}: {description}")
    return "\n".join(lines) + "\n"


def render_pipeline_diagram(
    output_stem: Union[str, Path],
    ablation: Optional[AblationConfig] = None,
    fmt: str = "png",
) -> Path:
    """
    Write the pipeline diagram next to `output_stem`

    Returns:
        Path of the rendered image, or of the text fallback when graphviz (the
        Python package or its system binaries) is unavailable
    """
    output_stem = Path(output_stem)
    if GRAPHVIZ_AVAILABLE:
        dot = Digraph(comment="Regeneration pipeline")
        dot.attr(rankdir="LR")
        dot.attr("node", shape="box", style="filled", fillcolor="lightblue")
        for state in PipelineStage:
            if state == PipelineStage.IDLE:
                dot.node(state.value, state.value.upper(), fillcolor="lightgreen")
            elif state == PipelineStage.COMPLETED:
                dot.node(state.value, state.value.upper(), fillcolor="gold")
            elif state == PipelineStage.COLLAPSED:
                dot.node(state.value, state.value.upper(), fillcolor="lightcoral")
            else:
                dot.node(state.value, state.value.upper())
        for source, target, label in pipeline_edges(ablation):
            dot.edge(source.value, target.value, label=label)
        try:
            rendered = dot.render(str(output_stem), format=fmt, cleanup=True)
            logger.info(f"Pipeline diagram saved: {rendered}")
            return Path(rendered)
        except Exception as e:
            logger.warning(f"Graphviz rendering failed ({e}); writing text diagram instead")

    text_path = output_stem.with_suffix(".txt")
    text_path.write_text(text_diagram(ablation), encoding="utf-8")
    logger.info(f"Text pipeline diagram saved: {text_path}")
    return text_path
