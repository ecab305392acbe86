/**
 * Reader/writer for the engine's binary matrix format.
 *
 * Layout (all integers little-endian):
 *   magic   4 bytes  "VLEB"
 *   version u32      1
 *   dtype   u32      0 (float32)
 *   rows    u64
 *   cols    u64
 *   keylen  u64      byte length of the key block
 *   keys    rows * [u32 length + UTF-8 bytes]
 *   data    rows*cols float32, row-major
 *
 * Files written here are byte-identical when rewritten, so the engine's
 * round-trip checks hold across both implementations.
 */

import { readFileSync, writeFileSync } from 'node:fs'

export const MAGIC = 'VLEB'
export const VERSION = 1
export const DTYPE_F32 = 0

const HEADER_BYTES = 36

export interface Matrix {
  rowKeys: string[]
  dim: number
  /** row-major, rowKeys.length * dim entries */
  data: Float32Array
}

export function writeMatrix(m: Matrix, path: string): void {
  const rows = m.rowKeys.length
  if (m.data.length !== rows * m.dim) {
    throw new Error(`data has ${m.data.length} entries, expected ${rows * m.dim}`)
  }
  const keyBufs: Buffer[] = []
  for (const key of m.rowKeys) {
    const utf8 = Buffer.from(key, 'utf-8')
    const len = Buffer.alloc(4)
    len.writeUInt32LE(utf8.length)
    keyBufs.push(len, utf8)
  }
  const keyBlock = Buffer.concat(keyBufs)

  const header = Buffer.alloc(HEADER_BYTES)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt32LE(VERSION, 4)
  header.writeUInt32LE(DTYPE_F32, 8)
  header.writeBigUInt64LE(BigInt(rows), 12)
  header.writeBigUInt64LE(BigInt(m.dim), 20)
  header.writeBigUInt64LE(BigInt(keyBlock.length), 28)

  const data = Buffer.alloc(m.data.length * 4)
  for (let i = 0; i < m.data.length; i++) {
    data.writeFloatLE(m.data[i], i * 4)
  }
  writeFileSync(path, Buffer.concat([header, keyBlock, data]))
}

export function readMatrix(path: string): Matrix {
  const blob = readFileSync(path)
  if (blob.length < HEADER_BYTES) {
    throw new Error(`${path}: ${blob.length} bytes is shorter than the header`)
  }
  if (blob.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`${path}: bad magic`)
  }
  const version = blob.readUInt32LE(4)
  if (version !== VERSION) {
    throw new Error(`${path}: unsupported version ${version}`)
  }
  const dtype = blob.readUInt32LE(8)
  if (dtype !== DTYPE_F32) {
    throw new Error(`${path}: unsupported dtype code ${dtype}`)
  }
  const rows = Number(blob.readBigUInt64LE(12))
  const cols = Number(blob.readBigUInt64LE(20))
  const keyLen = Number(blob.readBigUInt64LE(28))

  let offset = HEADER_BYTES
  const rowKeys: string[] = []
  for (let i = 0; i < rows; i++) {
    if (offset + 4 > blob.length) throw new Error(`${path}: key block truncated`)
    const len = blob.readUInt32LE(offset)
    offset += 4
    if (offset + len > blob.length) throw new Error(`${path}: key ${i} truncated`)
    rowKeys.push(blob.toString('utf-8', offset, offset + len))
    offset += len
  }
  if (offset - HEADER_BYTES !== keyLen) {
    throw new Error(
      `${path}: key block is ${offset - HEADER_BYTES} bytes, header says ${keyLen}`,
    )
  }
  const need = rows * cols * 4
  if (blob.length - offset < need) {
    throw new Error(`${path}: ${blob.length - offset} data bytes, expected ${need}`)
  }
  const data = new Float32Array(rows * cols)
  for (let i = 0; i < data.length; i++) {
    data[i] = blob.readFloatLE(offset + i * 4)
  }
  return { rowKeys, dim: cols, data }
}
