#!/usr/bin/env node
/**
 * embed-adapter: export embeddings into the engine's matrix format.
 *
 *   embed-adapter texts  --manifest texts_to_embed.tsv --out texts.veb
 *                        [--encoder hash|clip] [--dim 64] [--checkpoint id]
 *                        [--batch-size 32] [--no-normalize]
 *   embed-adapter images --list images.tsv --out images.veb [same flags]
 *   embed-adapter verify --matrix texts.veb [--manifest texts_to_embed.tsv]
 *
 * A job file (JSON with the same keys) can replace the flags:
 *   embed-adapter job --file job.json
 */

import { readFileSync } from 'node:fs'
import process from 'node:process'

import { embedImagesToFile, embedTextsToFile } from './adapter.js'
import { makeEncoder } from './encoders.js'
import { readImageList, readTextManifest } from './manifest.js'
import { readMatrix } from './vleb.js'

interface Flags {
  [key: string]: string | boolean
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {}
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${arg}`)
    const name = arg.slice(2)
    if (name.startsWith('no-')) {
      flags[name.slice(3)] = false
      continue
    }
    const next = argv[i + 1]
    if (next === undefined || next.startsWith('--')) {
      flags[name] = true
    } else {
      flags[name] = next
      i++
    }
  }
  return flags
}

function need(flags: Flags, name: string): string {
  const v = flags[name]
  if (typeof v !== 'string') throw new Error(`--${name} is required`)
  return v
}

async function cmdTexts(flags: Flags): Promise<void> {
  const entries = readTextManifest(need(flags, 'manifest'))
  const encoder = await makeEncoder(String(flags['encoder'] ?? 'hash'), {
    dim: flags['dim'] ? Number(flags['dim']) : undefined,
    checkpoint: typeof flags['checkpoint'] === 'string' ? flags['checkpoint'] : undefined,
  })
  await embedTextsToFile(entries, encoder, need(flags, 'out'), {
    batchSize: flags['batch-size'] ? Number(flags['batch-size']) : undefined,
    normalize: flags['normalize'] !== false,
    onProgress: (done, total) =>
      process.stderr.write(`\rembedding texts ${done}/${total}`),
  })
  process.stderr.write('\n')
  console.log(`wrote ${entries.length} x ${encoder.dim} text matrix (${encoder.name})`)
}

async function cmdImages(flags: Flags): Promise<void> {
  const entries = readImageList(need(flags, 'list'))
  const encoder = await makeEncoder(String(flags['encoder'] ?? 'hash'), {
    dim: flags['dim'] ? Number(flags['dim']) : undefined,
    checkpoint: typeof flags['checkpoint'] === 'string' ? flags['checkpoint'] : undefined,
  })
  await embedImagesToFile(entries, encoder, need(flags, 'out'), {
    batchSize: flags['batch-size'] ? Number(flags['batch-size']) : undefined,
    normalize: flags['normalize'] !== false,
    onProgress: (done, total) =>
      process.stderr.write(`\rembedding images ${done}/${total}`),
  })
  process.stderr.write('\n')
  console.log(`wrote ${entries.length} x ${encoder.dim} image matrix (${encoder.name})`)
}

function cmdVerify(flags: Flags): void {
  const m = readMatrix(need(flags, 'matrix'))
  let worst = 0
  for (let r = 0; r < m.rowKeys.length; r++) {
    let sq = 0
    for (let c = 0; c < m.dim; c++) sq += m.data[r * m.dim + c] ** 2
    worst = Math.max(worst, Math.abs(Math.sqrt(sq) - 1))
  }
  console.log(
    `${m.rowKeys.length} rows x ${m.dim} dims, max |norm - 1| = ${worst.toExponential(2)}`,
  )
  if (typeof flags['manifest'] === 'string') {
    const entries = readTextManifest(flags['manifest'])
    if (entries.length !== m.rowKeys.length) {
      throw new Error(
        `manifest has ${entries.length} ids, matrix has ${m.rowKeys.length} rows`,
      )
    }
    for (let i = 0; i < entries.length; i++) {
      if (entries[i].id !== m.rowKeys[i]) {
        throw new Error(
          `row ${i}: matrix key ${m.rowKeys[i]} != manifest id ${entries[i].id}`,
        )
      }
    }
    console.log('row keys match the manifest, in order')
  }
}

async function cmdJob(flags: Flags): Promise<void> {
  const job = JSON.parse(readFileSync(need(flags, 'file'), 'utf-8'))
  const merged: Flags = {}
  for (const [key, value] of Object.entries(job)) {
    if (key === 'kind') continue
    merged[key.replace(/_/g, '-')] =
      typeof value === 'boolean' ? value : String(value)
  }
  if (job.kind === 'texts') return cmdTexts(merged)
  if (job.kind === 'images') return cmdImages(merged)
  throw new Error(`job kind must be "texts" or "images", got ${JSON.stringify(job.kind)}`)
}

export async function main(argv: string[] = process.argv.slice(2)): Promise<number> {
  const [command, ...rest] = argv
  try {
    const flags = parseFlags(rest)
    if (command === 'texts') await cmdTexts(flags)
    else if (command === 'images') await cmdImages(flags)
    else if (command === 'verify') cmdVerify(flags)
    else if (command === 'job') await cmdJob(flags)
    else {
      console.error('usage: embed-adapter <texts|images|verify|job> [--flags]')
      return 1
    }
    return 0
  } catch (err) {
    console.error(`embed-adapter: ${err instanceof Error ? err.message : err}`)
    return 2
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href

if (invokedDirectly) {
  main().then((code) => process.exit(code))
}
