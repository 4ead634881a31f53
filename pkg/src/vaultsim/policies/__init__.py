"""Decision policies: directive grammar, tool-call wire form, reference and probe policies."""
