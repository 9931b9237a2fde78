"""Recaption service: the HTTP side of the curation pipeline's
text-rewriting interface.

Request {"prompt": str} -> reply {"text": str}. The bundled handler is
the deterministic stub; point HB_RECAPTION_ENDPOINT at a compatible
service to swap in a real model.

Run with: uvicorn hbvid.service:app
"""

from fastapi import FastAPI
from pydantic import BaseModel

from .curation import StubRecaptionClient

app = FastAPI(title="hbvid recaption service")
_client = StubRecaptionClient()


class RecaptionRequest(BaseModel):
    prompt: str


class RecaptionReply(BaseModel):
    text: str


@app.post("/recaption", response_model=RecaptionReply)
def recaption(request: RecaptionRequest):
    return RecaptionReply(**_client.generate({"prompt": request.prompt}))
