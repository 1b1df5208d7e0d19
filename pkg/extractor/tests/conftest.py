import json
import os

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")

WORDS = [
    "what", "is", "the", "sum", "of", "and", "solve", "for", "x", "a",
    "triangle", "has", "sides", "prove", "that", "integral", "compute",
    "2", "3", "5", "7", "11", "?", "+", "-", "=",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A 2-block GPT2-style model with random weights and a word-level
    tokenizer, saved locally so no hub access is needed."""
    import torch
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import Whitespace
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    out = tmp_path_factory.mktemp("tiny-model")
    vocab = {"[UNK]": 0, "[PAD]": 1}
    for w in WORDS:
        vocab[w] = len(vocab)
    tok = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = Whitespace()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]")
    fast.save_pretrained(out)

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=len(vocab), n_positions=32, n_embd=16, n_layer=2, n_head=2,
        n_inner=24, bos_token_id=0, eos_token_id=0,
    )
    GPT2LMHeadModel(config).save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def prompts_file(tmp_path_factory):
    """Twelve labeled prompts, difficulties alternating between 1 and 5."""
    tmp = tmp_path_factory.mktemp("prompts")
    path = tmp / "prompts.jsonl"
    questions = [
        "what is 2 + 3 ?",
        "solve for x",
        "the sum of 5 and 7",
        "a triangle has sides 3 5 7",
        "prove that x = 2",
        "compute the integral",
        "what is the sum of 2 and 2 ?",
        "solve the triangle",
        "what is 7 + 11 ?",
        "prove that the sum is 5",
        "compute 3 - 2",
        "is x = 5 ?",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        for i, q in enumerate(questions):
            fh.write(json.dumps({
                "problem_id": f"ex{i:03d}",
                "question": q,
                "difficulty": 1 if i % 2 == 0 else 5,
                "gold_answer": str(i),
            }) + "\n")
    return str(path)
