/**
 * Inputs the adapter consumes: the engine's texts-to-embed manifest
 * (`text_id<TAB>json-encoded text` per line) and plain image lists
 * (`image_id<TAB>path` per line). Ids are opaque; the contract is that
 * output row keys equal input ids exactly and in order.
 */

import { readFileSync } from 'node:fs'

export interface TextEntry {
  id: string
  text: string
}

export interface ImageEntry {
  id: string
  path: string
}

export function readTextManifest(path: string): TextEntry[] {
  const entries: TextEntry[] = []
  const seen = new Set<string>()
  for (const [lineNo, line] of lines(path)) {
    const tab = line.indexOf('\t')
    if (tab <= 0) {
      throw new Error(`${path}:${lineNo}: expected \`id<TAB>json text\``)
    }
    const id = line.slice(0, tab)
    if (seen.has(id)) throw new Error(`${path}:${lineNo}: duplicate id ${id}`)
    seen.add(id)
    let text: unknown
    try {
      text = JSON.parse(line.slice(tab + 1))
    } catch {
      throw new Error(`${path}:${lineNo}: text is not a JSON string`)
    }
    if (typeof text !== 'string') {
      throw new Error(`${path}:${lineNo}: text is not a JSON string`)
    }
    entries.push({ id, text })
  }
  if (entries.length === 0) throw new Error(`${path}: empty manifest`)
  return entries
}

export function readImageList(path: string): ImageEntry[] {
  const entries: ImageEntry[] = []
  const seen = new Set<string>()
  for (const [lineNo, line] of lines(path)) {
    const tab = line.indexOf('\t')
    if (tab <= 0) {
      throw new Error(`${path}:${lineNo}: expected \`id<TAB>image path\``)
    }
    const id = line.slice(0, tab)
    if (seen.has(id)) throw new Error(`${path}:${lineNo}: duplicate id ${id}`)
    seen.add(id)
    entries.push({ id, path: line.slice(tab + 1) })
  }
  if (entries.length === 0) throw new Error(`${path}: empty image list`)
  return entries
}

function* lines(path: string): Generator<[number, string]> {
  const raw = readFileSync(path, 'utf-8').split('\n')
  for (let i = 0; i < raw.length; i++) {
    const line = raw[i].replace(/\r$/, '')
    if (line.length === 0 || line.startsWith('#')) continue
    yield [i + 1, line]
  }
}
