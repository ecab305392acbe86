/**
 * Batch export of embeddings into the engine's matrix format.
 *
 * Output row keys always equal input ids, in input order. Rows are
 * unit-normalized by default so the engine can assume cosine-ready
 * inputs; pass normalize: false for raw exports. Inference runs in
 * batches; writing happens once, in manifest order, so re-running a job
 * yields identical bytes for a deterministic encoder.
 */

import type { Encoder } from './encoders.js'
import type { ImageEntry, TextEntry } from './manifest.js'
import { writeMatrix } from './vleb.js'

export interface JobOptions {
  batchSize?: number
  normalize?: boolean
  onProgress?: (done: number, total: number) => void
}

export function unitNormalize(row: Float32Array): Float32Array {
  let sq = 0
  for (let i = 0; i < row.length; i++) sq += row[i] * row[i]
  const norm = Math.sqrt(sq)
  if (norm === 0) throw new Error('zero-norm embedding row')
  const out = new Float32Array(row.length)
  for (let i = 0; i < row.length; i++) out[i] = row[i] / norm
  return out
}

async function runBatches<T>(
  items: T[],
  embed: (batch: T[]) => Promise<Float32Array[]>,
  opts: JobOptions,
): Promise<Float32Array[]> {
  const batchSize = opts.batchSize ?? 32
  if (batchSize < 1) throw new Error(`batch size must be >= 1, got ${batchSize}`)
  const rows: Float32Array[] = []
  for (let at = 0; at < items.length; at += batchSize) {
    const batch = items.slice(at, at + batchSize)
    const got = await embed(batch)
    if (got.length !== batch.length) {
      throw new Error(`encoder returned ${got.length} rows for ${batch.length} inputs`)
    }
    rows.push(...got)
    opts.onProgress?.(Math.min(at + batchSize, items.length), items.length)
  }
  return rows
}

function assemble(
  ids: string[],
  rows: Float32Array[],
  normalize: boolean,
): { rowKeys: string[]; dim: number; data: Float32Array } {
  const dim = rows[0].length
  const data = new Float32Array(ids.length * dim)
  for (let i = 0; i < rows.length; i++) {
    if (rows[i].length !== dim) {
      throw new Error(
        `row ${ids[i]} has dim ${rows[i].length}, first row has ${dim}`,
      )
    }
    data.set(normalize ? unitNormalize(rows[i]) : rows[i], i * dim)
  }
  return { rowKeys: ids, dim, data }
}

export async function embedTextsToFile(
  entries: TextEntry[],
  encoder: Encoder,
  outPath: string,
  opts: JobOptions = {},
): Promise<void> {
  const rows = await runBatches(entries, (b) => encoder.embedTexts(b.map((e) => e.text)), opts)
  writeMatrix(assemble(entries.map((e) => e.id), rows, opts.normalize ?? true), outPath)
}

export async function embedImagesToFile(
  entries: ImageEntry[],
  encoder: Encoder,
  outPath: string,
  opts: JobOptions = {},
): Promise<void> {
  const rows = await runBatches(
    entries,
    async (batch) => {
      try {
        return await encoder.embedImages(batch.map((e) => e.path))
      } catch (err) {
        throw new Error(`failed on images [${batch.map((e) => e.id).join(', ')}]: ${err}`)
      }
    },
    opts,
  )
  writeMatrix(assemble(entries.map((e) => e.id), rows, opts.normalize ?? true), outPath)
}
