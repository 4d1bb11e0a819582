from .counting import OTHER, count_simple, count_weighted, paper_weights, share_series
from .records import (Author, GroupDefinition, PaperRecord, load_groups, load_records,
                      normalize_name)
from .text import (KeywordMatcher, TfidfProfile, default_keywords, filter_deep_learning,
                   group_profile, inverse_document_frequency, period_profiles,
                   preprocess_text, tfidf_group_scores)
