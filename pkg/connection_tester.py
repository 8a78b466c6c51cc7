"""
Connection Tester für die Survey-Erzeugung
Testet LLM-, Embedding-, Semantic-Scholar- und Rerank-Backend
"""


def test_llm_connection(config):
    """Teste das Completion-Backend und gebe das Modell zurück"""
    try:
        from live_providers import _openai_client

        client = _openai_client(config)
        model = client.models.retrieve(config.model_name)
        return True, f"Modell {model.id} verfügbar"

    except Exception as e:
        return False, str(e)


def test_embedding_connection(config):
    """Teste das Embedding-Backend und gebe die Dimension zurück"""
    try:
        from live_providers import OpenAIEmbeddingProvider

        provider = OpenAIEmbeddingProvider(config)
        vector = provider.embed(['connection test'])[0]
        return True, f"{config.model_name}, Dimension {len(vector.vector)}"

    except Exception as e:
        return False, str(e)


def test_scholarly_connection(config):
    """Teste die Graph-API mit einer Suchanfrage"""
    try:
        from live_providers import SemanticScholarProvider

        provider = SemanticScholarProvider(config)
        records = provider.search_papers('large language models', 1)
        if not records:
            return True, "Erreichbar, aber keine Treffer"

        # Kürze Titel auf 80 Zeichen
        return True, f"Erreichbar, z.B. '{records[0].title[:80]}'"

    except Exception as e:
        return False, str(e)


def test_rerank_connection(config):
    """Teste den Rerank-Endpunkt; ohne Endpunkt wird Embedding-Kosinus verwendet"""
    if not config.endpoint:
        return True, "Kein Endpunkt konfiguriert, Embedding-Kosinus als Ersatz"
    try:
        from live_providers import HttpReranker

        scores = HttpReranker(config).rerank('connection test', ['connection test', 'unrelated'])
        return True, f"Erreichbar, {len(scores)} Scores"

    except Exception as e:
        return False, str(e)


def check_backends(run_config):
    """Alle Live-Backends testen; Liste von (Name, ok, Meldung)"""
    checks = [
        ('LLM', test_llm_connection, run_config.llm),
        ('Embedding', test_embedding_connection, run_config.embedding),
        ('Semantic Scholar', test_scholarly_connection, run_config.scholarly),
        ('Rerank', test_rerank_connection, run_config.rerank),
    ]
    return [(name, *check(config)) for name, check, config in checks]
