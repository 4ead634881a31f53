from .compiler import (BriefDiff, MissingSectionPayload, RenderedBrief, StructuredBrief,
                       brief_diff, compile_brief, reap_context)
from .template import (BriefTemplate, InvalidPermutation, SectionId, load_template,
                       move_section, permute_sections)

__all__ = ["BriefDiff", "BriefTemplate", "InvalidPermutation", "MissingSectionPayload",
           "RenderedBrief", "SectionId", "StructuredBrief", "brief_diff", "compile_brief",
           "load_template", "move_section", "permute_sections", "reap_context"]
