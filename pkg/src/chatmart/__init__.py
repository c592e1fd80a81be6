"""chatmart: health-survey chatbot dialogues to an OLAP-ready data mart.

Four stages: dialogue processing (entity extraction plus aggregation),
document storage, extract-transform-load into a star schema, and OLAP
summarization behind an HTTP API and dashboard.
"""

__version__ = "0.1.0"
