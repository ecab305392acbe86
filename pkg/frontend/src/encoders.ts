/**
 * Embedding backends behind one interface.
 *
 * `clipEncoder` drives a real contrastive checkpoint through
 * transformers.js (install `@huggingface/transformers` to use it; the
 * reference checkpoint is Xenova/clip-vit-base-patch32). `hashEncoder`
 * derives vectors from a BLAKE2 stream over the input bytes: useless as a
 * model, but fully deterministic across platforms, which is exactly what
 * format, alignment, and pipeline tests need.
 */

import { createHash } from 'node:crypto'
import { readFileSync } from 'node:fs'

export interface Encoder {
  readonly name: string
  readonly dim: number
  embedTexts(texts: string[]): Promise<Float32Array[]>
  embedImages(paths: string[]): Promise<Float32Array[]>
}

export function hashEncoder(dim = 64): Encoder {
  if (dim < 1) throw new Error(`dim must be >= 1, got ${dim}`)

  function vectorFor(payload: Buffer): Float32Array {
    const out = new Float32Array(dim)
    let block = Buffer.alloc(0)
    let counter = 0
    for (let i = 0; i < dim; i++) {
      const at = (i * 4) % 64
      if (at === 0) {
        const h = createHash('blake2b512')
        h.update(payload)
        h.update(Buffer.from([counter++]))
        block = h.digest()
      }
      // uint32 -> [-1, 1); deterministic everywhere
      out[i] = (block.readUInt32LE(at) / 2 ** 32) * 2 - 1
    }
    return out
  }

  return {
    name: 'hash',
    dim,
    async embedTexts(texts) {
      return texts.map((t) => vectorFor(Buffer.from(t, 'utf-8')))
    },
    async embedImages(paths) {
      return paths.map((p) => vectorFor(readFileSync(p)))
    },
  }
}

const DEFAULT_CHECKPOINT = 'Xenova/clip-vit-base-patch32'

export async function clipEncoder(
  checkpoint: string = DEFAULT_CHECKPOINT,
): Promise<Encoder> {
  let hf: any
  try {
    // computed specifier: the dependency is optional and may be absent
    const mod = '@huggingface/transformers'
    hf = await import(/* @vite-ignore */ mod)
  } catch {
    throw new Error(
      'clip encoder needs the optional dependency @huggingface/transformers; ' +
        'install it or use --encoder hash',
    )
  }
  const tokenizer = await hf.AutoTokenizer.from_pretrained(checkpoint)
  const textModel = await hf.CLIPTextModelWithProjection.from_pretrained(checkpoint)
  const processor = await hf.AutoProcessor.from_pretrained(checkpoint)
  const visionModel = await hf.CLIPVisionModelWithProjection.from_pretrained(checkpoint)
  const dim = Number(textModel.config.projection_dim ?? 512)

  function rowsOf(embeds: any, count: number): Float32Array[] {
    const flat = Float32Array.from(embeds.data)
    const d = flat.length / count
    const rows: Float32Array[] = []
    for (let i = 0; i < count; i++) rows.push(flat.slice(i * d, (i + 1) * d))
    return rows
  }

  return {
    name: `clip:${checkpoint}`,
    dim,
    async embedTexts(texts) {
      const inputs = tokenizer(texts, { padding: true, truncation: true })
      const { text_embeds } = await textModel(inputs)
      return rowsOf(text_embeds, texts.length)
    },
    async embedImages(paths) {
      const images = await Promise.all(paths.map((p) => hf.RawImage.read(p)))
      const inputs = await processor(images)
      const { image_embeds } = await visionModel(inputs)
      return rowsOf(image_embeds, paths.length)
    },
  }
}

export async function makeEncoder(
  kind: string,
  opts: { dim?: number; checkpoint?: string },
): Promise<Encoder> {
  if (kind === 'hash') return hashEncoder(opts.dim ?? 64)
  if (kind === 'clip') return clipEncoder(opts.checkpoint)
  throw new Error(`unknown encoder ${JSON.stringify(kind)}; use hash or clip`)
}
