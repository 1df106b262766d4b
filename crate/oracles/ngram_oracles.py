"""Reference values for the n-gram metric tests.

BLEU and single-reference NIST come from nltk; multi-reference NIST is a
direct transcription of the mteval-v13a scoring loop.
"""
import math
from collections import Counter

from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu
from nltk.translate.nist_score import corpus_nist


def w(s):
    return s.split()


def ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def mteval_nist(cands, refsets, max_n):
    counts = Counter()
    words = 0
    for refs in refsets:
        for r in refs:
            words += len(r)
            for n in range(1, max_n + 1):
                counts.update(ngrams(r, n))
    info = {}
    for g, c in counts.items():
        num = words if len(g) == 1 else counts[g[:-1]]
        info[g] = math.log(num / c) / math.log(2)
    isum = [0.0] * max_n
    tot = [0] * max_n
    sys_len = 0
    ref_len = 0.0
    for cand, refs in zip(cands, refsets):
        sys_len += len(cand)
        ref_len += sum(len(r) for r in refs) / len(refs)
        for n in range(1, max_n + 1):
            hc = Counter(ngrams(cand, n))
            rmax = Counter()
            for r in refs:
                for g, k in Counter(ngrams(r, n)).items():
                    rmax[g] = max(rmax[g], k)
            for g, k in hc.items():
                tot[n - 1] += k
                m = min(k, rmax[g])
                if m:
                    isum[n - 1] += info[g] * m
    score = sum(isum[n] / tot[n] for n in range(max_n) if tot[n])
    ratio = sys_len / ref_len
    beta = math.log(0.5) / math.log(1.5) ** 2
    bp = 1.0 if ratio >= 1 else math.exp(beta * math.log(ratio) ** 2)
    return score * bp


c = w("the the cat is on a mat near the door")
r1 = w("the cat is on the mat")
r2 = w("there is a cat on the mat by the door")
print("BLEU_NLTK_PLAIN", repr(sentence_bleu([r1, r2], c)))
print("BLEU_NLTK_EPS", repr(sentence_bleu([r1], w("a cat sat on a mat"),
                                           smoothing_function=SmoothingFunction(epsilon=0.1).method1)))

c1 = w("it is a guide to action which ensures that the military always obeys the commands of the party")
c2 = w("he read the book because he was interested in world history")
r1a = w("it is a guide to action that ensures that the military will forever heed party commands")
r1b = w("it is the guiding principle which guarantees the military forces always being under the command of the party")
r2a = w("he was interested in world history because he read the book")
print("NIST5_ORACLE", repr(mteval_nist([c1, c2], [[r1a, r1b], [r2a]], 5)))
print("NIST2_ORACLE", repr(mteval_nist([c1, c2], [[r1a, r1b], [r2a]], 2)))
print("NIST4_SINGLE_NLTK", repr(corpus_nist([[r1a], [r2a]], [c1, c2], 4)),
      "mteval:", repr(mteval_nist([c1, c2], [[r1a], [r2a]], 4)))
