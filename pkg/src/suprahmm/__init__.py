"""Second-order circular suprasegmental HMM toolkit."""
