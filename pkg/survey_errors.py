"""
Fehlerklassen für die Survey-Pipeline
Jede Fehlerfamilie trägt ihren Exit Code für run_survey.py
"""


class SurveyError(Exception):
    """Basisklasse aller Pipeline-Fehler"""
    exit_code = 4

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.message = str(message)
        self.stage = stage

    def to_dict(self):
        return {
            'error': type(self).__name__,
            'message': self.message,
            'exit_code': self.exit_code,
            'stage': self.stage,
        }


# ========== KONFIGURATION ==========

class ConfigError(SurveyError):
    exit_code = 2


# ========== PROVIDER ==========

class ProviderError(SurveyError):
    exit_code = 3


class BackendUnreachable(ProviderError):
    """Backend nicht erreichbar (wiederholbar)"""


class RateLimited(ProviderError):
    """Backend meldet Rate-Limit (HTTP 429)"""

    def __init__(self, message, retry_after=None, stage=None):
        super().__init__(message, stage=stage)
        self.retry_after = retry_after


class ProviderTimeout(ProviderError):
    pass


class SchemaViolation(ProviderError):
    """Antwort passt nach allen Versuchen nicht zum Ausgabeschema"""

    def __init__(self, message, raw_text='', stage=None):
        super().__init__(message, stage=stage)
        self.raw_text = raw_text

    def to_dict(self):
        data = super().to_dict()
        data['raw_text'] = self.raw_text[:2000]
        return data


class UnknownPaperId(ProviderError):
    pass


class EmptyInputError(ProviderError, ValueError):
    pass


# ========== PIPELINE ==========

class PipelineError(SurveyError):
    exit_code = 4


class PreconditionError(PipelineError, ValueError):
    pass


class CyclicGraphError(PipelineError):
    pass


class UnknownBibkeyError(PipelineError, KeyError):

    def __str__(self):
        return self.message


class DegenerateOutputError(PipelineError):
    """LLM liefert auch nach Wiederholung keine brauchbare Ausgabe"""


class SubsectionError(PipelineError):

    def __init__(self, message, subsection_id=None, stage=None):
        super().__init__(message, stage=stage)
        self.subsection_id = subsection_id

    def to_dict(self):
        data = super().to_dict()
        data['subsection_id'] = self.subsection_id
        return data


class DocumentParseError(PipelineError):

    def __init__(self, message, location=None, stage='evaluate'):
        super().__init__(message, stage=stage)
        self.location = location

    def to_dict(self):
        data = super().to_dict()
        data['location'] = self.location
        return data
